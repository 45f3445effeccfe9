use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use savc_core::inference::{aggregated_predict_features, confusion_matrix, ncm_predict};
use savc_core::prototypes::{PrototypeBank, SessionPrototypes};

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Bank of `per_session` classes in each of `sessions` sessions, `m` variants.
fn random_bank(rng: &mut ChaCha8Rng, sessions: &[usize], m: usize, d: usize) -> PrototypeBank {
    let mut bank = PrototypeBank::new(m, d);
    let mut class = 0;
    for (t, &n) in sessions.iter().enumerate() {
        let mut s = SessionPrototypes { session: t, ..Default::default() };
        for _ in 0..n {
            for v in 0..m {
                s.entries.insert((class, v), random_vec(rng, d));
            }
            s.counts.insert(class, 1);
            class += 1;
        }
        bank.extend(s).unwrap();
    }
    bank
}

fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

#[test]
fn ncm_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bank = random_bank(&mut rng, &[5], 1, 6);
    for _ in 0..20 {
        let q = random_vec(&mut rng, 6);
        let p = ncm_predict(&q, &bank).unwrap();
        let mut best = (0usize, f64::NEG_INFINITY);
        for c in 0..5 {
            let s = naive_cos(&q, bank.get(0, c, 0).unwrap());
            if s > best.1 {
                best = (c, s);
            }
        }
        assert_eq!(p.class, best.0);
        assert!((p.score - best.1).abs() < 1e-12);
    }
}

#[test]
fn single_variant_aggregation_equals_ncm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bank = random_bank(&mut rng, &[6, 2, 2], 1, 8);
    for _ in 0..1000 {
        let q = random_vec(&mut rng, 8);
        let a = aggregated_predict_features(&[&q], &bank).unwrap();
        let n = ncm_predict(&q, &bank).unwrap();
        assert_eq!((a.class, a.session), (n.class, n.session));
        assert_eq!(a.score.to_bits(), n.score.to_bits());
    }
}

#[test]
fn score_breakdown_sums_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = random_bank(&mut rng, &[4, 2], 4, 5);
    for _ in 0..50 {
        let feats: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 5)).collect();
        let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let p = aggregated_predict_features(&refs, &bank).unwrap();
        assert!((p.per_variant.iter().sum::<f64>() - p.score).abs() < 1e-6);
        assert!(p.score.abs() <= 4.0);
    }
}

#[test]
fn variant_permutation_does_not_change_decision() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = 4;
    let bank = random_bank(&mut rng, &[5, 2], m, 6);
    let perm = [2, 0, 3, 1];
    let mut permuted = PrototypeBank::new(m, 6);
    for t in bank.sessions() {
        let mut s = SessionPrototypes { session: t, ..Default::default() };
        for (tt, c) in bank.classes() {
            if tt != t {
                continue;
            }
            for (v, &src) in perm.iter().enumerate() {
                s.entries.insert((c, v), bank.get(t, c, src).unwrap().to_vec());
            }
            s.counts.insert(c, 1);
        }
        permuted.extend(s).unwrap();
    }
    for _ in 0..100 {
        let feats: Vec<Vec<f64>> = (0..m).map(|_| random_vec(&mut rng, 6)).collect();
        let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let prefs: Vec<&[f64]> = perm.iter().map(|&src| feats[src].as_slice()).collect();
        let a = aggregated_predict_features(&refs, &bank).unwrap();
        let b = aggregated_predict_features(&prefs, &permuted).unwrap();
        assert_eq!(a.class, b.class);
    }
}

#[test]
fn session_restriction_hides_later_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = random_bank(&mut rng, &[3, 2, 2], 2, 4);
    let first = bank.up_to_session(1);
    assert_eq!(first.classes().len(), 5);
    for _ in 0..50 {
        let feats: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut rng, 4)).collect();
        let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        assert!(aggregated_predict_features(&refs, &first).unwrap().session <= 1);
    }
}

#[test]
fn confusion_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let preds: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
    let labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
    let m = confusion_matrix(&preds, &labels, 3).unwrap();
    let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
    for (&p, &y) in preds.iter().zip(&labels) {
        *counts.entry((y, p)).or_default() += 1;
    }
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(m.get(i, j), counts.get(&(i, j)).copied().unwrap_or(0));
        }
        let row: u64 = (0..3).map(|j| m.get(i, j)).sum();
        assert_eq!(row, labels.iter().filter(|&&y| y == i).count() as u64);
    }
}

proptest! {
    #[test]
    fn positive_scaling_keeps_argmax(seed in any::<u64>(), scale in 0.001f64..1000.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = random_bank(&mut rng, &[4, 2], 2, 5);
        let mut scaled = PrototypeBank::new(2, 5);
        for t in bank.sessions() {
            let mut s = SessionPrototypes { session: t, ..Default::default() };
            for (k, v) in bank.entries().filter(|(k, _)| k.session == t) {
                s.entries.insert((k.class, k.variant), v.iter().map(|x| x * scale).collect());
                s.counts.insert(k.class, 1);
            }
            scaled.extend(s).unwrap();
        }
        let feats: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut rng, 5)).collect();
        let sfeats: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().map(|x| x * scale).collect()).collect();
        let a = aggregated_predict_features(&[&feats[0], &feats[1]], &bank).unwrap();
        let b = aggregated_predict_features(&[&sfeats[0], &sfeats[1]], &scaled).unwrap();
        prop_assert_eq!(a.class, b.class);
    }
}
