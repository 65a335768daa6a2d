//! Store-everything-then-reduce coverage recomputation over synthetic records.

use std::collections::BTreeSet;

use nnfuzz_core::coverage::profile::NeuronProfile;
use nnfuzz_core::coverage::{CoverageState, CoverageTracker, Criterion, NcScaling};
use nnfuzz_core::model::ActivationRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIZES: [usize; 3] = [3, 4, 2];

pub fn record(rng: &mut ChaCha8Rng) -> ActivationRecord {
    ActivationRecord {
        layers: SIZES.iter().map(|&n| (0..n).map(|_| rng.gen_range(-1.0f32..2.0)).collect()).collect(),
        penultimate: (0..4).map(|_| rng.gen_range(0.0f32..3.0)).collect(),
        logits: vec![0.0; 2],
        predicted_label: 0,
    }
}

pub fn brute_profile(records: &[ActivationRecord]) -> NeuronProfile {
    let n: usize = SIZES.iter().sum();
    let mut low = vec![f32::MAX; n];
    let mut high = vec![f32::MIN; n];
    for r in records {
        let flat: Vec<f32> = r.layers.concat();
        for i in 0..n {
            if flat[i] < low[i] {
                low[i] = flat[i];
            }
            if flat[i] > high[i] {
                high[i] = flat[i];
            }
        }
    }
    NeuronProfile { low, high }
}

/// Coverage value of `records` computed from nothing.
pub fn reduce(criterion: Criterion, p: &NeuronProfile, records: &[ActivationRecord]) -> f64 {
    let n: usize = SIZES.iter().sum();
    let mut hit = BTreeSet::<(usize, usize)>::new();
    let total = match criterion {
        Criterion::Nc { threshold, scaling } => {
            for r in records {
                let mut base = 0;
                for layer in &r.layers {
                    let lo = layer.iter().cloned().fold(f32::INFINITY, f32::min);
                    let hi = layer.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    for (u, &a) in layer.iter().enumerate() {
                        let scaled = match scaling {
                            NcScaling::Raw => a,
                            NcScaling::PerLayerMinMax => {
                                if hi > lo {
                                    (a - lo) / (hi - lo)
                                } else {
                                    0.0
                                }
                            }
                        };
                        if scaled > threshold {
                            hit.insert((base + u, 0));
                        }
                    }
                    base += layer.len();
                }
            }
            n
        }
        Criterion::Kmn { k } => {
            for r in records {
                for (i, a) in r.layers.concat().into_iter().enumerate() {
                    let (lo, hi) = (p.low[i] as f64, p.high[i] as f64);
                    let a = a as f64;
                    if a < lo || a > hi {
                        continue;
                    }
                    let s = if hi == lo { 0 } else { (((a - lo) / (hi - lo)) * k as f64).floor() as usize };
                    hit.insert((i, s.min(k - 1)));
                }
            }
            k * n
        }
        Criterion::Nbc => {
            for r in records {
                for (i, a) in r.layers.concat().into_iter().enumerate() {
                    if a < p.low[i] {
                        hit.insert((i, 0));
                    }
                    if a > p.high[i] {
                        hit.insert((i, 1));
                    }
                }
            }
            2 * n
        }
        Criterion::Snac => {
            for r in records {
                for (i, a) in r.layers.concat().into_iter().enumerate() {
                    if a > p.high[i] {
                        hit.insert((i, 1));
                    }
                }
            }
            n
        }
        Criterion::Tfc { threshold } => {
            let mut kept: Vec<&[f32]> = Vec::new();
            for r in records {
                let far = kept
                    .iter()
                    .all(|v| v.iter().zip(&r.penultimate).map(|(a, b)| (a - b) * (a - b)).sum::<f32>() > threshold);
                if far {
                    kept.push(&r.penultimate);
                }
            }
            return kept.len() as f64;
        }
    };
    hit.len() as f64 / total as f64
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion::nc(),
        Criterion::Nc { threshold: 0.5, scaling: NcScaling::Raw },
        Criterion::kmn(),
        Criterion::Kmn { k: 7 },
        Criterion::Nbc,
        Criterion::Snac,
        Criterion::Tfc { threshold: 1.0 },
    ]
}

/// Incremental increase vs recomputation on `pairs` random (T, batch) pairs
/// for each criterion. Returns the number of pairs checked.
pub fn check_increase_pairs(seed: u64, pairs: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for criterion in criteria() {
        for pair in 0..pairs {
            let train: Vec<_> = (0..30).map(|_| record(&mut rng)).collect();
            let profile = brute_profile(&train);
            let t: Vec<_> = (0..rng.gen_range(1..30)).map(|_| record(&mut rng)).collect();
            let b: Vec<_> = (0..rng.gen_range(1..10)).map(|_| record(&mut rng)).collect();
            let err = |what: &str, got: f64, want: f64| format!("{criterion:?} pair {pair}: {what} {got} vs {want}");

            let mut state = CoverageState::new(criterion, SIZES.to_vec(), Some(profile.clone())).unwrap();
            state.commit(&t).unwrap();
            let before = reduce(criterion, &profile, &t);
            if state.value() != before {
                return Err(err("committed value", state.value(), before));
            }
            let union: Vec<_> = t.iter().chain(&b).cloned().collect();
            let after = reduce(criterion, &profile, &union);
            let got = state.coverage_increase(&b).unwrap();
            if got != after - before {
                return Err(err("increase", got, after - before));
            }
            let committed = state.commit(&b).unwrap();
            if committed != got || state.value() != after {
                return Err(err("commit", state.value(), after));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
