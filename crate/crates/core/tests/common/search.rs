//! Synthetic reward games for the tree search.

use nnfuzz_core::mcts::{search_batch, GameTree, NodeRole, SearchBudget};
use nnfuzz_core::mutation::{CompleteAction, MutatorConfig};
use nnfuzz_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise narrow enough that every default action, blur included, stays
/// within the default distance limit, so any (region, mutation) can be the
/// rewarding one.
pub fn seed_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tensor> {
    (0..n)
        .map(|_| Tensor::new(vec![1, 9, 9], (0..81).map(|_| rng.gen_range(0.4f32..0.6)).collect()).unwrap())
        .collect()
}

/// Deterministic pseudo-reward in [0, 1) from the batch contents.
pub fn hashed_reward(batch: &[Tensor]) -> Result<f64> {
    let s: f64 = batch.iter().flat_map(|t| t.data()).map(|&v| v as f64).sum();
    Ok((s * 7.31).fract().abs())
}

/// One root with enough iterations to open every (region, mutation) pair.
pub fn one_hot_budget() -> SearchBudget {
    SearchBudget {
        iterations_per_root: 70,
        max_roots: Some(1),
        ..SearchBudget::default()
    }
}

/// Trials (of 100) in which the search returns the single rewarding action.
pub fn one_hot_hits() -> usize {
    let mutator = MutatorConfig::default();
    let budget = one_hot_budget();
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let seed = seed_batch(&mut rng, 2);
        let target = CompleteAction {
            region: rng.gen_range(0..9),
            mutation: rng.gen_range(0..5),
        };
        let goal = mutator.apply(&seed, target).unwrap();
        // exhaustive check: the target is legal and the only action reaching the goal
        let reaching: Vec<_> = (0..9)
            .flat_map(|region| (0..5).map(move |mutation| CompleteAction { region, mutation }))
            .filter(|&a| mutator.apply(&seed, a).unwrap() == goal)
            .collect();
        assert_eq!(reaching, vec![target], "trial {trial}");
        assert!(mutator.constraint.batch_within(&goal, &seed).unwrap(), "trial {trial}");
        let mut reward = |b: &[Tensor]| -> Result<f64> { Ok(if b == goal.as_slice() { 1.0 } else { 0.0 }) };
        let out = search_batch(&seed, &mut reward, &mutator, &budget, &mut rng).unwrap();
        if out.best_batch == goal && out.best_increase == 1.0 {
            assert_eq!(out.best_actions, vec![target]);
            hits += 1;
        }
    }
    hits
}

/// Drives a tree by hand for `steps` select/expand/simulate/backpropagate
/// steps, checking structure after each; also returns every scored reward
/// and the best one.
pub fn random_walk(seed: u64, steps: usize) -> std::result::Result<(Vec<f64>, f64), String> {
    let mutator = MutatorConfig::default();
    let budget = SearchBudget::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seed = seed_batch(&mut rng, 2);
    let mut tree = GameTree::new(seed.clone(), 9, 5, &budget);
    let mut best = 0.0f64;
    let mut rewards = Vec::new();
    for step in 0..steps {
        if step % 25 == 24 && tree.advance_root(&mut rng).is_none() {
            tree = GameTree::new(seed.clone(), 9, 5, &budget);
        }
        if tree.is_exhausted() {
            tree = GameTree::new(seed.clone(), 9, 5, &budget);
        }
        let leaf = tree.select(&mut rng);
        if !tree.is_expandable(leaf) {
            if leaf != tree.root() {
                tree.mark_terminal(leaf);
            }
            continue;
        }
        let child = tree.expand(leaf, &mut rng).unwrap();
        let node = tree.node(child);
        let parent = tree.node(node.parent.unwrap());
        if node.role() == parent.role() {
            return Err(format!("step {step}: levels do not alternate"));
        }
        let action = tree.simulate(child, &mut rng).unwrap();
        let base = tree.simulation_base(child).unwrap();
        if tree.node(base).role() != NodeRole::ChooseRegion {
            return Err(format!("step {step}: simulation base is not a region node"));
        }
        let base_batch = tree.batch(base, &mutator).unwrap();
        let candidate = mutator.apply(&base_batch, action).unwrap();
        if rng.gen_bool(0.1) {
            tree.mark_terminal(child);
        } else {
            let r = hashed_reward(&candidate).unwrap();
            rewards.push(r);
            best = best.max(r);
            tree.backpropagate(child, r);
        }
        tree.check_invariants().map_err(|e| format!("step {step}: {e}"))?;
    }
    Ok((rewards, best))
}
