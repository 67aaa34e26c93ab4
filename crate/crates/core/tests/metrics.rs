use fsfnet::metrics::ConfusionMatrix;
use fsfnet::raster::{LabelMap, IGNORE_LABEL};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 5;

fn random_pair(rng: &mut ChaCha8Rng) -> (LabelMap, LabelMap) {
    let gt = (0..256)
        .map(|_| {
            if rng.random_bool(0.1) {
                IGNORE_LABEL
            } else {
                rng.random_range(0..K as u8)
            }
        })
        .collect();
    let pred = (0..256).map(|_| rng.random_range(0..K as u8)).collect();
    (LabelMap::new(16, 16, pred).unwrap(), LabelMap::new(16, 16, gt).unwrap())
}

/// Metrics recomputed straight from pixel lists, no matrix involved.
fn brute_force(pairs: &[(LabelMap, LabelMap)]) -> (Vec<u64>, f64, f64) {
    let mut counts = vec![0u64; K * K];
    let (mut correct, mut scored) = (0u64, 0u64);
    let mut ious = Vec::new();
    for c in 0..K as u8 {
        let (mut inter, mut union) = (0u64, 0u64);
        for (pred, gt) in pairs {
            for (&p, &g) in pred.data.iter().zip(&gt.data) {
                if g == IGNORE_LABEL {
                    continue;
                }
                if p == c && g == c {
                    inter += 1;
                }
                if p == c || g == c {
                    union += 1;
                }
            }
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    for (pred, gt) in pairs {
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            if g != IGNORE_LABEL {
                counts[g as usize * K + p as usize] += 1;
                scored += 1;
                correct += (p == g) as u64;
            }
        }
    }
    (
        counts,
        ious.iter().sum::<f64>() / ious.len() as f64,
        correct as f64 / scored as f64,
    )
}

#[test]
fn metrics_match_per_pixel_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pairs: Vec<_> = (0..20).map(|_| random_pair(&mut rng)).collect();
    let mut cm = ConfusionMatrix::new(K);
    for (pred, gt) in &pairs {
        cm.accumulate(pred, gt).unwrap();
    }
    let (counts, miou, acc) = brute_force(&pairs);
    assert_eq!(cm.counts(), counts.as_slice());
    assert!((cm.mean_iou().unwrap() - miou).abs() < 1e-12);
    assert!((cm.pixel_accuracy().unwrap() - acc).abs() < 1e-12);
}

#[test]
fn accumulation_order_and_sharding_do_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs: Vec<_> = (0..6).map(|_| random_pair(&mut rng)).collect();
    let mut forward = ConfusionMatrix::new(K);
    for (p, g) in &pairs {
        forward.accumulate(p, g).unwrap();
    }
    let mut backward = ConfusionMatrix::new(K);
    for (p, g) in pairs.iter().rev() {
        backward.accumulate(p, g).unwrap();
    }
    let (mut a, mut b) = (ConfusionMatrix::new(K), ConfusionMatrix::new(K));
    for (i, (p, g)) in pairs.iter().enumerate() {
        if i % 2 == 0 { &mut a } else { &mut b }.accumulate(p, g).unwrap();
    }
    b.merge(&a).unwrap();
    assert_eq!(forward, backward);
    assert_eq!(forward, b);
}

proptest! {
    #[test]
    fn relabeling_preserves_metrics(
        counts in proptest::collection::vec(0u64..50, K * K),
        perm in Just((0..K).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let cm = ConfusionMatrix::from_counts(K, counts.clone()).unwrap();
        let mut permuted = vec![0u64; K * K];
        for g in 0..K {
            for p in 0..K {
                permuted[perm[g] * K + perm[p]] = counts[g * K + p];
            }
        }
        let pm = ConfusionMatrix::from_counts(K, permuted).unwrap();
        prop_assert!((cm.mean_iou().unwrap() - pm.mean_iou().unwrap()).abs() < 1e-12);
        prop_assert_eq!(cm.pixel_accuracy().unwrap(), pm.pixel_accuracy().unwrap());
        let (miou, acc) = (cm.mean_iou().unwrap(), cm.pixel_accuracy().unwrap());
        prop_assert!((0.0..=1.0).contains(&miou) && (0.0..=1.0).contains(&acc));
    }
}
